use alloc::vec;
use alloc::vec::Vec;

use crate::math::Rgb;

/// Row-major linear RGB image; row 0 is the top of the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![Rgb::BLACK; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count does not match dimensions");
        Self { width, height, pixels }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Rgb) {
        self.pixels[row * self.width + col] = value;
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: Rgb) {
        self.pixels[row * self.width + col] += value;
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn is_black(&self) -> bool {
        self.pixels.iter().all(|p| p.is_black())
    }

    /// Mean over pixels of the channel average.
    pub fn mean_luminance(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|p| (p.r + p.g + p.b) / 3.0).sum::<f64>() / self.pixels.len() as f64
    }
}
