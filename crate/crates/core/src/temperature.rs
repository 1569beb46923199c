//! Per-page hot/cold classification with a ring of Bloom filters.
//!
//! Writes are recorded into the filter under the cursor. Every
//! `window_writes` writes the cursor moves to the next filter, which is
//! cleared first, so the ring remembers the last `filters` windows. A page is
//! hot when it appears in at least `hot_threshold` of them.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Temperature {
    Hot,
    Cold,
}

impl Temperature {
    pub fn class_index(self) -> usize {
        match self {
            Temperature::Hot => 0,
            Temperature::Cold => 1,
        }
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Temperature::Hot => "HOT",
            Temperature::Cold => "COLD",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectorConfig {
    pub filters: usize,
    pub bits_per_filter: usize,
    pub hashes: u32,
    pub window_writes: u64,
    pub hot_threshold: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { filters: 4, bits_per_filter: 16384, hashes: 2, window_writes: 4096, hot_threshold: 2 }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Clone, Debug)]
struct BloomFilter {
    words: Vec<u64>,
    bits: usize,
}

impl BloomFilter {
    fn new(bits: usize) -> Self {
        BloomFilter { words: vec![0; bits.div_ceil(64)], bits }
    }

    // Kirsch-Mitzenmacher double hashing.
    fn positions(&self, key: u64, hashes: u32) -> impl Iterator<Item = usize> + '_ {
        let h1 = splitmix64(key);
        let h2 = splitmix64(h1 ^ 0x5851_f42d_4c95_7f2d) | 1;
        (0..hashes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % self.bits as u64) as usize)
    }

    fn insert(&mut self, key: u64, hashes: u32) {
        let positions: Vec<usize> = self.positions(key, hashes).collect();
        for p in positions {
            self.words[p / 64] |= 1 << (p % 64);
        }
    }

    fn contains(&self, key: u64, hashes: u32) -> bool {
        self.positions(key, hashes).all(|p| self.words[p / 64] >> (p % 64) & 1 == 1)
    }

    fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }
}

#[derive(Clone, Debug)]
pub struct TemperatureDetector {
    config: DetectorConfig,
    filters: Vec<BloomFilter>,
    cursor: usize,
    writes_in_window: u64,
}

impl TemperatureDetector {
    pub fn new(config: DetectorConfig) -> Self {
        TemperatureDetector {
            config,
            filters: (0..config.filters).map(|_| BloomFilter::new(config.bits_per_filter)).collect(),
            cursor: 0,
            writes_in_window: 0,
        }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn record_write(&mut self, lpn: u64) {
        if self.writes_in_window == self.config.window_writes {
            self.cursor = (self.cursor + 1) % self.filters.len();
            self.filters[self.cursor].clear();
            self.writes_in_window = 0;
        }
        self.filters[self.cursor].insert(lpn, self.config.hashes);
        self.writes_in_window += 1;
    }

    /// Number of filters that report `lpn` as present.
    pub fn hits(&self, lpn: u64) -> usize {
        self.filters.iter().filter(|f| f.contains(lpn, self.config.hashes)).count()
    }

    pub fn in_current_window(&self, lpn: u64) -> bool {
        self.filters[self.cursor].contains(lpn, self.config.hashes)
    }

    pub fn classify(&self, lpn: u64) -> Temperature {
        if self.hits(lpn) >= self.config.hot_threshold {
            Temperature::Hot
        } else {
            Temperature::Cold
        }
    }
}
