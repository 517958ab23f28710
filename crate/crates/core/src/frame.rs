//! Planar RGB frames and grayscale planes.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHANNELS: usize = 3;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// 8-bit planar RGB frame: the R plane, then G, then B, each row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    index: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, index: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("frame dimensions must be positive"));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::contract(format!(
                "frame buffer has {} bytes, expected {}",
                data.len(),
                width * height * CHANNELS
            )));
        }
        Ok(Frame {
            width,
            height,
            index,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, index: usize, rgb: [u8; 3]) -> Result<Self> {
        let plane = width * height;
        let mut data = vec![0u8; plane * CHANNELS];
        for (c, v) in rgb.iter().enumerate() {
            data[c * plane..(c + 1) * plane].fill(*v);
        }
        Frame::new(width, height, index, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let plane = self.width * self.height;
        let o = y * self.width + x;
        [self.data[o], self.data[plane + o], self.data[2 * plane + o]]
    }

    pub(crate) fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let plane = self.width * self.height;
        let o = y * self.width + x;
        self.data[o] = rgb[0];
        self.data[plane + o] = rgb[1];
        self.data[2 * plane + o] = rgb[2];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    fps: f64,
}

impl VideoSequence {
    pub const DEFAULT_FPS: f64 = 30.0;

    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate() {
                if f.index != i {
                    return Err(Error::contract(format!("frame {} carries index {}", i, f.index)));
                }
                if f.width != first.width || f.height != first.height {
                    return Err(Error::contract("frames must share dimensions"));
                }
            }
        }
        Ok(VideoSequence { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Single-channel float image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayPlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayPlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::contract("gray plane size mismatch"));
        }
        Ok(GrayPlane { width, height, data })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Copy of the `w × h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayPlane {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        GrayPlane {
            width: w,
            height: h,
            data,
        }
    }
}

pub fn rgb_to_gray(frame: &Frame) -> GrayPlane {
    let plane = frame.width * frame.height;
    let (r, rest) = frame.data.split_at(plane);
    let (g, b) = rest.split_at(plane);
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| LUMA[0] * r as f64 + LUMA[1] * g as f64 + LUMA[2] * b as f64)
        .collect();
    GrayPlane {
        width: frame.width,
        height: frame.height,
        data,
    }
}
