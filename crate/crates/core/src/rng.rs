//! Counter-based random numbers. A draw depends only on (seed, family,
//! group ids, counter), never on evaluation order or thread count.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Independent stream for one (seed, family, ids) key.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, family: &str, ids: &[u64]) -> Self {
        let mut key = mix(seed ^ GOLDEN);
        key = mix(key ^ fnv1a(family));
        for &id in ids {
            key = mix(key.wrapping_add(GOLDEN) ^ id);
        }
        Self { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.key ^ mix(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        v
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Standard normal by Box–Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// One standard normal for a key.
pub fn normal(seed: u64, family: &str, ids: &[u64]) -> f64 {
    Stream::new(seed, family, ids).normal()
}
