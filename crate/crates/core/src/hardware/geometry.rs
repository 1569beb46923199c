use std::fmt;
use std::str::FromStr;

/// Shape of the flash array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub channels: u32,
    pub luns_per_channel: u32,
    pub blocks_per_lun: u32,
    pub pages_per_block: u32,
    pub page_size_bytes: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { channels: 4, luns_per_channel: 2, blocks_per_lun: 128, pages_per_block: 64, page_size_bytes: 4096 }
    }
}

impl Geometry {
    pub fn total_luns(&self) -> u32 {
        self.channels * self.luns_per_channel
    }

    pub fn total_blocks(&self) -> usize {
        self.total_luns() as usize * self.blocks_per_lun as usize
    }

    pub fn total_pages(&self) -> u64 {
        self.total_blocks() as u64 * self.pages_per_block as u64
    }

    /// Global LUN index of an address (`channel * luns_per_channel + lun`).
    pub fn lun_of(&self, ppa: Ppa) -> LunId {
        LunId(ppa.channel * self.luns_per_channel + ppa.lun)
    }

    pub fn channel_of_lun(&self, lun: LunId) -> u32 {
        lun.0 / self.luns_per_channel
    }

    pub fn block_index(&self, ppa: Ppa) -> usize {
        self.lun_of(ppa).0 as usize * self.blocks_per_lun as usize + ppa.block as usize
    }

    pub fn page_index(&self, ppa: Ppa) -> usize {
        self.block_index(ppa) * self.pages_per_block as usize + ppa.page as usize
    }

    pub fn ppa_at(&self, lun: LunId, block: u32, page: u32) -> Ppa {
        Ppa { channel: lun.0 / self.luns_per_channel, lun: lun.0 % self.luns_per_channel, block, page }
    }

    pub fn ppa_of_page_index(&self, index: usize) -> Ppa {
        let ppb = self.pages_per_block as usize;
        let block_index = index / ppb;
        let lun = LunId((block_index / self.blocks_per_lun as usize) as u32);
        self.ppa_at(lun, (block_index % self.blocks_per_lun as usize) as u32, (index % ppb) as u32)
    }

    pub fn contains(&self, ppa: Ppa) -> bool {
        ppa.channel < self.channels
            && ppa.lun < self.luns_per_channel
            && ppa.block < self.blocks_per_lun
            && ppa.page < self.pages_per_block
    }

    pub fn luns(&self) -> impl Iterator<Item = LunId> {
        (0..self.total_luns()).map(LunId)
    }
}

/// Global LUN index across all channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LunId(pub u32);

/// A physical page coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ppa {
    pub channel: u32,
    pub lun: u32,
    pub block: u32,
    pub page: u32,
}

impl Ppa {
    pub fn new(channel: u32, lun: u32, block: u32, page: u32) -> Self {
        Ppa { channel, lun, block, page }
    }

    pub fn with_page(self, page: u32) -> Self {
        Ppa { page, ..self }
    }
}

impl fmt::Display for Ppa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.channel, self.lun, self.block, self.page)
    }
}

impl FromStr for Ppa {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.parse::<u32>().map_err(|e| format!("bad address {s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [channel, lun, block, page] => Ok(Ppa { channel, lun, block, page }),
            _ => Err(format!("bad address {s:?}: expected channel:lun:block:page")),
        }
    }
}
