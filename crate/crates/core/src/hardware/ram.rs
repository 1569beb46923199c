//! Controller memory bookkeeping.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RamPool {
    Ram,
    BatteryBacked,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RamBudget {
    ram_used: u64,
    ram_capacity: u64,
    bbram_used: u64,
    bbram_capacity: u64,
}

impl RamBudget {
    pub fn new(ram_capacity: u64, bbram_capacity: u64) -> Self {
        RamBudget { ram_used: 0, ram_capacity, bbram_used: 0, bbram_capacity }
    }

    fn pool(&mut self, pool: RamPool) -> (&mut u64, u64) {
        match pool {
            RamPool::Ram => (&mut self.ram_used, self.ram_capacity),
            RamPool::BatteryBacked => (&mut self.bbram_used, self.bbram_capacity),
        }
    }

    /// Returns false, leaving the accounting untouched, when the pool would overflow.
    pub fn reserve(&mut self, pool: RamPool, bytes: u64) -> bool {
        let (used, capacity) = self.pool(pool);
        match used.checked_add(bytes) {
            Some(total) if total <= capacity => {
                *used = total;
                true
            }
            _ => false,
        }
    }

    pub fn release(&mut self, pool: RamPool, bytes: u64) {
        let (used, _) = self.pool(pool);
        *used = used.saturating_sub(bytes);
    }

    pub fn used(&self, pool: RamPool) -> u64 {
        match pool {
            RamPool::Ram => self.ram_used,
            RamPool::BatteryBacked => self.bbram_used,
        }
    }

    pub fn capacity(&self, pool: RamPool) -> u64 {
        match pool {
            RamPool::Ram => self.ram_capacity,
            RamPool::BatteryBacked => self.bbram_capacity,
        }
    }
}
