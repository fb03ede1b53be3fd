use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel class indices (0 = background), row-major. Binary masks use 0/1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask values for {width}×{height}",
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }

    pub fn marked(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// 0/1 mask of the pixels equal to `class`.
    pub fn binary(&self, class: u8) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| u8::from(v == class)).collect(),
        }
    }

    pub fn hflip(&self) -> Mask {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        Mask {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}
