use crate::preprocess::{rgb_to_hsv, ImageTensor};

pub const COLOR_BINS: usize = 32;
pub const HOG_BINS: usize = 9;
pub const HOG_CELL: usize = 8;
pub const HOG_BLOCK: usize = 2;
pub const LBP_BINS: usize = 59;
pub const BLOB_LEVELS: usize = 5;
pub const BLOB_HIST_BINS: usize = 8;
pub const BLOB_DIM: usize = 3 + BLOB_HIST_BINS;
/// Minimum |DoG| response for a blob.
pub const BLOB_THRESHOLD: f32 = 0.01;
/// Responses at or above this fall in the last histogram bin.
pub const BLOB_HIST_MAX: f32 = 0.2;
const BLOB_SIGMA0: f32 = 1.6;

/// ITU-R 601 luma.
pub fn grayscale(img: &ImageTensor) -> Vec<f32> {
    img.data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

/// Concatenated L1-normalized H, S and V histograms.
pub fn color_feature(img: &ImageTensor) -> Vec<f32> {
    let mut hist = vec![0.0f64; 3 * COLOR_BINS];
    for p in img.data.chunks_exact(3) {
        let hsv = rgb_to_hsv([p[0], p[1], p[2]]);
        for (c, v) in hsv.iter().enumerate() {
            let bin = ((v.clamp(0.0, 1.0) * COLOR_BINS as f32) as usize).min(COLOR_BINS - 1);
            hist[c * COLOR_BINS + bin] += 1.0;
        }
    }
    let n = (img.height * img.width).max(1) as f64;
    hist.iter().map(|&c| (c / n) as f32).collect()
}

pub fn hog_dim(height: usize, width: usize) -> usize {
    let (cy, cx) = (height / HOG_CELL, width / HOG_CELL);
    (cy + 1).saturating_sub(HOG_BLOCK) * (cx + 1).saturating_sub(HOG_BLOCK) * HOG_BLOCK * HOG_BLOCK * HOG_BINS
}

/// Unsigned-orientation HOG with centered differences, hard orientation
/// binning weighted by magnitude and L2-normalized overlapping blocks.
pub fn hog_feature(img: &ImageTensor) -> Vec<f32> {
    let gray = grayscale(img);
    let (h, w) = (img.height, img.width);
    let (cy, cx) = (h / HOG_CELL, w / HOG_CELL);
    let mut cells = vec![0.0f32; cy * cx * HOG_BINS];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let (ccy, ccx) = (y / HOG_CELL, x / HOG_CELL);
            if ccy >= cy || ccx >= cx {
                continue;
            }
            let gx = gray[y * w + x + 1] - gray[y * w + x - 1];
            let gy = gray[(y + 1) * w + x] - gray[(y - 1) * w + x];
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((angle / (180.0 / HOG_BINS as f32)) as usize).min(HOG_BINS - 1);
            cells[(ccy * cx + ccx) * HOG_BINS + bin] += mag;
        }
    }
    let mut out = Vec::with_capacity(hog_dim(h, w));
    for by in 0..(cy + 1).saturating_sub(HOG_BLOCK) {
        for bx in 0..(cx + 1).saturating_sub(HOG_BLOCK) {
            let start = out.len();
            for dy in 0..HOG_BLOCK {
                for dx in 0..HOG_BLOCK {
                    let c = (by + dy) * cx + bx + dx;
                    out.extend_from_slice(&cells[c * HOG_BINS..(c + 1) * HOG_BINS]);
                }
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f32>() + 1e-10).sqrt();
            out[start..].iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Number of 0/1 transitions around the circular 8-bit pattern.
fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_left(1)).count_ones()
}

/// Maps each 8-bit pattern to its uniform-LBP bin; non-uniform patterns share the last bin.
pub fn lbp_bin_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut next = 0u8;
    for code in 0..=255u8 {
        table[code as usize] = if transitions(code) <= 2 {
            next += 1;
            next - 1
        } else {
            (LBP_BINS - 1) as u8
        };
    }
    table
}

/// Neighbors of the radius-1, 8-point pattern, clockwise from the top-left.
pub const LBP_OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

/// LBP code at an interior pixel: bit `i` is set when neighbor `i` is strictly brighter.
pub fn lbp_code(gray: &[f32], width: usize, y: usize, x: usize) -> u8 {
    let center = gray[y * width + x];
    let mut code = 0u8;
    for (i, (dy, dx)) in LBP_OFFSETS.iter().enumerate() {
        let v = gray[(y as isize + dy) as usize * width + (x as isize + dx) as usize];
        if v > center {
            code |= 1 << i;
        }
    }
    code
}

/// L1-normalized uniform LBP histogram over interior pixels.
pub fn texture_feature(img: &ImageTensor) -> Vec<f32> {
    let gray = grayscale(img);
    let (h, w) = (img.height, img.width);
    let table = lbp_bin_table();
    let mut hist = vec![0.0f64; LBP_BINS];
    let mut n = 0usize;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            hist[table[lbp_code(&gray, w, y, x) as usize] as usize] += 1.0;
            n += 1;
        }
    }
    if n == 0 {
        hist[0] = 1.0;
        n = 1;
    }
    hist.iter().map(|&c| (c / n as f64) as f32).collect()
}

fn blur_gray(gray: &[f32], h: usize, w: usize, sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|d| (-((d * d) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; gray.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, wt) in k.iter().enumerate() {
                acc += wt * gray[y * w + clamp(x as isize + i as isize - radius, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; gray.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, wt) in k.iter().enumerate() {
                acc += wt * tmp[clamp(y as isize + i as isize - radius, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Gaussian scales `sigma0 * sqrt(2)^i` for the `BLOB_LEVELS + 1` blurred images.
pub fn blob_sigmas() -> Vec<f32> {
    (0..=BLOB_LEVELS)
        .map(|i| BLOB_SIGMA0 * 2f32.sqrt().powi(i as i32))
        .collect()
}

/// Characteristic scale of DoG level `i` (geometric mean of its two sigmas).
pub fn blob_level_scales() -> Vec<f32> {
    let s = blob_sigmas();
    s.windows(2).map(|p| (p[0] * p[1]).sqrt()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub y: usize,
    pub x: usize,
    pub scale: f32,
    pub response: f32,
}

/// Principal-curvature ratio above which an extremum is treated as an edge.
const BLOB_EDGE_RATIO: f32 = 10.0;

fn edge_like(d: &[f32], w: usize, y: usize, x: usize) -> bool {
    let at = |yy: usize, xx: usize| d[yy * w + xx];
    let dxx = at(y, x + 1) + at(y, x - 1) - 2.0 * at(y, x);
    let dyy = at(y + 1, x) + at(y - 1, x) - 2.0 * at(y, x);
    let dxy = (at(y + 1, x + 1) - at(y + 1, x - 1) - at(y - 1, x + 1) + at(y - 1, x - 1)) / 4.0;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = BLOB_EDGE_RATIO;
    det <= 0.0 || tr * tr / det >= (r + 1.0) * (r + 1.0) / r
}

/// Local extrema of |DoG| over space and scale above [`BLOB_THRESHOLD`],
/// excluding edge-like responses.
pub fn detect_blobs(img: &ImageTensor) -> Vec<Blob> {
    let gray = grayscale(img);
    let (h, w) = (img.height, img.width);
    let blurred: Vec<Vec<f32>> = blob_sigmas().iter().map(|&s| blur_gray(&gray, h, w, s)).collect();
    let signed: Vec<Vec<f32>> = blurred
        .windows(2)
        .map(|p| p[1].iter().zip(&p[0]).map(|(a, b)| a - b).collect())
        .collect();
    let dog: Vec<Vec<f32>> = signed.iter().map(|l| l.iter().map(|v| v.abs()).collect()).collect();
    let scales = blob_level_scales();
    let mut blobs = Vec::new();
    for (l, level) in dog.iter().enumerate() {
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let v = level[y * w + x];
                if v < BLOB_THRESHOLD {
                    continue;
                }
                let mut is_max = true;
                'scan: for ll in l.saturating_sub(1)..=(l + 1).min(BLOB_LEVELS - 1) {
                    for yy in y - 1..=y + 1 {
                        for xx in x - 1..=x + 1 {
                            if (ll, yy, xx) == (l, y, x) {
                                continue;
                            }
                            let u = dog[ll][yy * w + xx];
                            // ties are broken toward the earliest position so plateaus yield one blob
                            let earlier = (ll, yy, xx) < (l, y, x);
                            if u > v || (u == v && earlier) {
                                is_max = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if is_max && !edge_like(&signed[l], w, y, x) {
                    blobs.push(Blob {
                        y,
                        x,
                        scale: scales[l],
                        response: v,
                    });
                }
            }
        }
    }
    blobs
}

/// `[count/255 (capped), mean scale, mean |response|, 8-bin response histogram]`.
pub fn blob_feature(img: &ImageTensor) -> Vec<f32> {
    let blobs = detect_blobs(img);
    let mut out = vec![0.0f32; BLOB_DIM];
    let mut hist = [0.0f32; BLOB_HIST_BINS];
    if blobs.is_empty() {
        hist[0] = 1.0;
    } else {
        let n = blobs.len() as f32;
        out[0] = blobs.len().min(255) as f32 / 255.0;
        out[1] = blobs.iter().map(|b| b.scale).sum::<f32>() / n;
        out[2] = blobs.iter().map(|b| b.response).sum::<f32>() / n;
        for b in &blobs {
            let bin = ((b.response / BLOB_HIST_MAX * BLOB_HIST_BINS as f32) as usize).min(BLOB_HIST_BINS - 1);
            hist[bin] += 1.0 / n;
        }
    }
    out[3..].copy_from_slice(&hist);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::hsv_to_rgb;

    fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> ImageTensor {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&f(y, x));
            }
        }
        ImageTensor::new(h, w, data).unwrap()
    }

    #[test]
    fn color_of_constant_image() {
        let img = ImageTensor::filled(16, 16, [0.8, 0.2, 0.1]);
        let f = color_feature(&img);
        assert_eq!(f.len(), 96);
        for c in 0..3 {
            let ch = &f[c * 32..(c + 1) * 32];
            assert_eq!(ch.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(ch.iter().filter(|&&v| v == 0.0).count(), 31);
        }
    }

    #[test]
    fn hue_rotation_by_one_bin_is_a_cyclic_shift() {
        // one column per hue bin, sampled at bin centers
        let img = |shift: usize| {
            from_fn(4, 32, |y, x| {
                let bin = (x * 7 + y) % 32;
                let h = ((bin + shift) % 32) as f32 / 32.0 + 1.0 / 64.0;
                hsv_to_rgb([h, 0.75, 0.6])
            })
        };
        let a = color_feature(&img(0));
        let b = color_feature(&img(1));
        for k in 0..32 {
            assert_eq!(b[(k + 1) % 32], a[k], "bin {k}");
        }
        assert_eq!(a[32..], b[32..]);
    }

    #[test]
    fn hog_shape_and_uniform_image() {
        assert_eq!(hog_dim(224, 224), 27 * 27 * 36);
        let f = hog_feature(&ImageTensor::filled(224, 224, [0.3, 0.3, 0.3]));
        assert_eq!(f.len(), 26244);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_edge_votes_for_horizontal_gradient() {
        let img = from_fn(32, 32, |_, x| if x < 13 { [0.0; 3] } else { [1.0; 3] });
        let f = hog_feature(&img);
        let mut per_bin = [0.0f32; HOG_BINS];
        for (i, v) in f.iter().enumerate() {
            per_bin[i % HOG_BINS] += v;
        }
        let total: f32 = per_bin.iter().sum();
        assert!(total > 0.0);
        assert!(per_bin[0] / total > 0.99, "{per_bin:?}");
    }

    #[test]
    fn lbp_table_has_58_uniform_patterns() {
        let table = lbp_bin_table();
        assert_eq!(table.iter().filter(|&&b| b as usize == LBP_BINS - 1).count(), 256 - 58);
        assert_eq!(table[0], 0);
        assert_eq!(table[255] as usize, 57);
    }

    #[test]
    fn texture_of_constant_image() {
        let f = texture_feature(&ImageTensor::filled(10, 10, [0.5; 3]));
        assert_eq!(f.len(), 59);
        assert_eq!(f[0], 1.0);
        assert!((f.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn checkerboard_matches_brute_force() {
        let img = from_fn(8, 8, |y, x| if (x + y) % 2 == 0 { [1.0; 3] } else { [0.0; 3] });
        let gray = grayscale(&img);
        // independent oracle: explicit neighbor walk and transition counting on bit strings
        let mut expected = vec![0.0f64; 59];
        let uniform: Vec<u32> = (0u32..256)
            .filter(|c| {
                let bits: Vec<u32> = (0..8).map(|i| (c >> i) & 1).collect();
                (0..8).filter(|&i| bits[i] != bits[(i + 1) % 8]).count() <= 2
            })
            .collect();
        for y in 1..7 {
            for x in 1..7 {
                let c = gray[y * 8 + x];
                let nbrs = [
                    gray[(y - 1) * 8 + x - 1],
                    gray[(y - 1) * 8 + x],
                    gray[(y - 1) * 8 + x + 1],
                    gray[y * 8 + x + 1],
                    gray[(y + 1) * 8 + x + 1],
                    gray[(y + 1) * 8 + x],
                    gray[(y + 1) * 8 + x - 1],
                    gray[y * 8 + x - 1],
                ];
                let code: u32 = nbrs.iter().enumerate().map(|(i, &v)| ((v > c) as u32) << i).sum();
                let bin = uniform.iter().position(|&u| u == code).unwrap_or(58);
                expected[bin] += 1.0 / 36.0;
            }
        }
        let got = texture_feature(&img);
        for (g, e) in got.iter().zip(&expected) {
            assert!((*g as f64 - e).abs() < 1e-6);
        }
    }

    #[test]
    fn blob_of_uniform_image() {
        let f = blob_feature(&ImageTensor::filled(40, 40, [0.4; 3]));
        assert_eq!(f.len(), 11);
        assert_eq!(f[3], 1.0);
        assert!(f.iter().enumerate().all(|(i, &v)| i == 3 || v == 0.0));
    }

    #[test]
    fn single_gaussian_spot() {
        let scales = blob_level_scales();
        let sigma = scales[2];
        let img = from_fn(64, 64, |y, x| {
            let r2 = (y as f32 - 32.0).powi(2) + (x as f32 - 32.0).powi(2);
            [(-r2 / (2.0 * sigma * sigma)).exp(); 3]
        });
        let blobs = detect_blobs(&img);
        assert_eq!(blobs.len(), 1, "{blobs:?}");
        let nearest = scales
            .iter()
            .min_by(|a, b| (*a - sigma).abs().total_cmp(&(*b - sigma).abs()))
            .unwrap();
        assert_eq!(blobs[0].scale, *nearest);
        assert_eq!((blobs[0].y, blobs[0].x), (32, 32));
    }
}
