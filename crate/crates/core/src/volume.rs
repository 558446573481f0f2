/// Borrowed channel-major `(channel, row, col)` volume of per-pixel features.
///
/// Both [`crate::HyperspectralCube`] and [`crate::nncore::Tensor4`] use this
/// layout, so superpixels and ranking can run on either without copying.
#[derive(Debug, Clone, Copy)]
pub struct FeatureView<'a> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: &'a [f64],
}

impl<'a> FeatureView<'a> {
    pub fn new(channels: usize, height: usize, width: usize, data: &'a [f64]) -> crate::Result<Self> {
        if data.len() != channels * height * width {
            return Err(crate::Error::shape(format!(
                "feature buffer has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &'a [f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Per-channel z-scored copy (population variance). Constant channels
    /// become all zeros.
    pub fn standardized(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut out = vec![0.0; self.data.len()];
        crate::par::for_each_chunk_mut(&mut out, n.max(1), |c, dst| {
            let src = self.channel(c);
            let mean = src.iter().sum::<f64>() / n as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            if var > 0.0 {
                let inv = 1.0 / var.sqrt();
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = (s - mean) * inv;
                }
            }
        });
        out
    }
}
