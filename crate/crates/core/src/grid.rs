//! Plain-text grid images used by the mock science handlers.
//!
//! ```text
//! FGRID 1
//! <height> <width>
//! <width space-separated decimals>   (height lines)
//! ```

use std::fmt::Write as _;

pub const MAGIC: &str = "FGRID 1";
pub const CONTENT_TYPE: &str = "application/x-fgrid";

/// Upper bound on height × width accepted by the parser.
pub const MAX_PIXELS: usize = 1 << 24;

pub const BLUR_SIGMA: f64 = 1.5;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("malformed grid at line {line}: {reason}")]
pub struct GridError {
    pub line: usize,
    pub reason: String,
}

fn malformed(line: usize, reason: impl Into<String>) -> GridError {
    GridError {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GridImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(malformed(2, "height and width must be positive"));
        }
        if height.checked_mul(width) != Some(pixels.len()) {
            return Err(malformed(
                2,
                format!("{} pixels for a {height}x{width} grid", pixels.len()),
            ));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(malformed(3, format!("non-finite pixel {bad}")));
        }
        Ok(GridImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, GridError> {
        GridImage::new(height, width, vec![value; height.saturating_mul(width)])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn parse(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(malformed(n, format!("expected `{MAGIC}`, got `{other}`"))),
            None => return Err(malformed(1, "empty input")),
        }
        let (n, dims) = lines.next().ok_or_else(|| malformed(2, "missing dimensions"))?;
        let mut parts = dims.split_ascii_whitespace();
        let mut dim = |name: &str| -> Result<usize, GridError> {
            parts
                .next()
                .ok_or_else(|| malformed(n, format!("missing {name}")))?
                .parse::<usize>()
                .map_err(|e| malformed(n, format!("bad {name}: {e}")))
        };
        let height = dim("height")?;
        let width = dim("width")?;
        if parts.next().is_some() {
            return Err(malformed(n, "trailing tokens after dimensions"));
        }
        if height == 0 || width == 0 {
            return Err(malformed(n, "height and width must be positive"));
        }
        match height.checked_mul(width) {
            Some(count) if count <= MAX_PIXELS => {}
            _ => return Err(malformed(n, format!("{height}x{width} exceeds {MAX_PIXELS} pixels"))),
        }

        let mut pixels = Vec::new();
        for row in 0..height {
            let (n, line) = lines
                .next()
                .ok_or_else(|| malformed(3 + row, format!("missing row {}", row + 1)))?;
            let before = pixels.len();
            for token in line.split_ascii_whitespace() {
                let v: f64 = token
                    .parse()
                    .map_err(|_| malformed(n, format!("`{token}` is not a number")))?;
                if !v.is_finite() {
                    return Err(malformed(n, format!("non-finite value `{token}`")));
                }
                pixels.push(v);
                if pixels.len() - before > width {
                    return Err(malformed(n, format!("more than {width} values")));
                }
            }
            if pixels.len() - before != width {
                return Err(malformed(
                    n,
                    format!("expected {width} values, got {}", pixels.len() - before),
                ));
            }
        }
        if let Some((n, _)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(malformed(n, "unexpected content after last row"));
        }
        Ok(GridImage {
            height,
            width,
            pixels,
        })
    }

    /// Canonical text form. Values use the shortest decimal that parses
    /// back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(16 + self.pixels.len() * 8);
        out.push_str(MAGIC);
        out.push('\n');
        let _ = writeln!(out, "{} {}", self.height, self.width);
        for row in self.pixels.chunks(self.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridImage {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// 3×3 Gaussian weights sampled at offsets −1, 0, 1 and normalized to sum 1.
/// Indexed `[row offset + 1][col offset + 1]`.
pub fn gaussian_kernel(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let denom = 2.0 * sigma * sigma;
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let dy = i as f64 - 1.0;
            let dx = j as f64 - 1.0;
            *w = (-(dx * dx + dy * dy) / denom).exp();
            sum += *w;
        }
    }
    for w in k.iter_mut().flatten() {
        *w /= sum;
    }
    k
}

/// Convolves with the σ = 1.5 kernel, replicating edge pixels outward.
pub fn gaussian_blur(image: &GridImage) -> GridImage {
    let k = gaussian_kernel(BLUR_SIGMA);
    let (h, w) = (image.height as isize, image.width as isize);
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, krow) in k.iter().enumerate() {
                let rr = (r + i as isize - 1).clamp(0, h - 1) as usize;
                for (j, weight) in krow.iter().enumerate() {
                    let cc = (c + j as isize - 1).clamp(0, w - 1) as usize;
                    acc += weight * image.get(rr, cc);
                }
            }
            pixels.push(acc);
        }
    }
    GridImage {
        height: image.height,
        width: image.width,
        pixels,
    }
}

/// Zeroes every pixel whose magnitude exceeds `threshold`.
pub fn flag(image: &GridImage, threshold: f64) -> GridImage {
    image.map(|v| if v.abs() > threshold { 0.0 } else { v })
}

pub fn calibrate(image: &GridImage, gain: f64) -> GridImage {
    image.map(|v| v * gain)
}
