//! Labeled random streams derived from one master seed.
//!
//! Each consumer (latency, drops, duplication, protocol timeouts, ...) draws
//! from its own ChaCha stream, so adding draws to one never shifts another.
//! The stream seed is `splitmix64(master ^ fnv1a64(label))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Latency,
    Drops,
    Duplication,
    Timeouts,
    Workload,
    ClientLinks,
    Faults,
}

impl Stream {
    pub fn label(self) -> &'static str {
        match self {
            Stream::Latency => "net.latency",
            Stream::Drops => "net.drops",
            Stream::Duplication => "net.duplication",
            Stream::Timeouts => "protocol.timeouts",
            Stream::Workload => "workload",
            Stream::ClientLinks => "client.links",
            Stream::Faults => "faults",
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn stream_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(master ^ fnv1a64(stream.label().as_bytes()))
}

pub fn stream(master: u64, stream: Stream) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_each_other() {
        let mut a = stream(42, Stream::Drops);
        let mut b = stream(42, Stream::Latency);
        let xs: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.random()).collect();
        assert_ne!(xs, ys);
        let mut a2 = stream(42, Stream::Drops);
        let xs2: Vec<u64> = (0..4).map(|_| a2.random()).collect();
        assert_eq!(xs, xs2);
    }
}
