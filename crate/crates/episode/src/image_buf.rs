use hypergen_tensor::Tensor;

/// A single image in channel-major [C,H,W] layout with values in [0,1] before
/// normalization. f32 is enough for pixel data; the model casts as needed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageBuf {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    /// 90-degree counter-clockwise rotation, applied `times` times.
    /// Requires a square image (rotation variants share one class shape).
    pub fn rot90(&self, times: u8) -> ImageBuf {
        assert_eq!(self.height, self.width, "rot90 needs square images");
        let mut out = self.clone();
        for _ in 0..(times % 4) {
            let src = out.clone();
            let n = src.height;
            for c in 0..src.channels {
                for y in 0..n {
                    for x in 0..n {
                        *out.at_mut(c, n - 1 - x, y) = src.at(c, y, x);
                    }
                }
            }
        }
        out
    }

    pub fn hflip(&self) -> ImageBuf {
        let mut out = ImageBuf::new(self.channels, self.height, self.width);
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    *out.at_mut(c, y, self.width - 1 - x) = self.at(c, y, x);
                }
            }
        }
        out
    }

    /// Translate by (dy, dx), padding the exposed border with zeros (black).
    pub fn shift(&self, dy: i32, dx: i32) -> ImageBuf {
        let mut out = ImageBuf::new(self.channels, self.height, self.width);
        for c in 0..self.channels {
            for y in 0..self.height {
                let sy = y as i32 - dy;
                if sy < 0 || sy >= self.height as i32 {
                    continue;
                }
                for x in 0..self.width {
                    let sx = x as i32 - dx;
                    if sx < 0 || sx >= self.width as i32 {
                        continue;
                    }
                    *out.at_mut(c, y, x) = self.at(c, sy as usize, sx as usize);
                }
            }
        }
        out
    }

    /// Standardized tensor view: (x - mean) / std, shape [C,H,W].
    pub fn to_tensor(&self, mean: f32, std: f32) -> Tensor<f32> {
        let data = self.data.iter().map(|&v| (v - mean) / std).collect();
        Tensor::new(vec![self.channels, self.height, self.width], data)
            .expect("image tensor shape")
    }
}
