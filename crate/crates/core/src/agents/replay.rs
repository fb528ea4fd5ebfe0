use rand::Rng;

/// Fixed-capacity ring buffer; the oldest item is overwritten once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample with replacement. `None` until the buffer holds at least
    /// `size` items.
    pub fn sample<'a>(&'a self, size: usize, rng: &mut impl Rng) -> Option<Vec<&'a T>> {
        if self.items.len() < size || size == 0 {
            return None;
        }
        Some((0..size).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}
