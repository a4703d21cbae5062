/// Dense rows of bits, one row per key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BitRows {
    words: usize,
    data: Vec<u64>,
}

impl BitRows {
    pub fn new(rows: usize, cols: usize) -> Self {
        let words = cols.div_ceil(64);
        Self {
            words,
            data: vec![0; rows * words],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.words + col / 64] >> (col % 64) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.data[row * self.words + col / 64] |= 1 << (col % 64);
    }

    /// `row |= other`
    pub fn or_row(&mut self, row: usize, other: usize) {
        if row == other {
            return;
        }
        let w = self.words;
        let (dst, src) = if row < other {
            let (a, b) = self.data.split_at_mut(other * w);
            (&mut a[row * w..(row + 1) * w], &b[..w])
        } else {
            let (a, b) = self.data.split_at_mut(row * w);
            (&mut b[..w], &a[other * w..(other + 1) * w])
        };
        for (d, s) in dst.iter_mut().zip(src) {
            *d |= s;
        }
    }
}
