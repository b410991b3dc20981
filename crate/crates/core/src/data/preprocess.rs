//! Aspect-preserving bilinear resize into a fixed canvas, padded with zeros bottom/right.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FULL_HEIGHT: usize = 480;
pub const FULL_WIDTH: usize = 800;

/// Bilinear resample of a `[1, H, W]` image to `out_h x out_w` (pixel-centre aligned, edge
/// clamped).
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [1, h, w] = *image.shape() else {
        return Err(Error::shape("resize", format!("expected [1,H,W], got {:?}", image.shape())));
    };
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Data(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    let src = image.data();
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (p - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::from_vec(&[1, out_h, out_w], out)
}

/// Scales `image` to fit inside `height x width` keeping its aspect ratio, then zero-pads the
/// bottom and right edges to exactly that size. Values are clipped to `[0, 1]`.
pub fn preprocess(image: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let [1, h, w] = *image.shape() else {
        return Err(Error::shape("preprocess", format!("expected [1,H,W], got {:?}", image.shape())));
    };
    if h == 0 || w == 0 {
        return Err(Error::Data(format!("zero-area image {h}x{w}")));
    }
    let scale = (height as f64 / h as f64).min(width as f64 / w as f64);
    let nh = ((h as f64 * scale).round() as usize).clamp(1, height);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, width);
    let resized = if (nh, nw) == (h, w) {
        image.clone()
    } else {
        resize_bilinear(image, nh, nw)?
    };
    let mut out = Tensor::zeros(&[1, height, width]);
    for y in 0..nh {
        let dst = &mut out.data_mut()[y * width..y * width + nw];
        for (d, &s) in dst.iter_mut().zip(&resized.data()[y * nw..(y + 1) * nw]) {
            *d = s.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canvas_sized_input_is_unchanged() {
        let data: Vec<f32> = (0..FULL_HEIGHT * FULL_WIDTH).map(|i| ((i * 7) % 256) as f32 / 255.0).collect();
        let img = Tensor::from_vec(&[1, FULL_HEIGHT, FULL_WIDTH], data).unwrap();
        assert_eq!(preprocess(&img, FULL_HEIGHT, FULL_WIDTH).unwrap(), img);
        // the resampler itself is an identity at scale one
        assert_eq!(resize_bilinear(&img, FULL_HEIGHT, FULL_WIDTH).unwrap(), img);
    }

    #[test]
    fn half_size_input_doubles_without_padding() {
        let img = Tensor::from_vec(&[1, 240, 400], (0..240 * 400).map(|i| ((i / 400 + i % 400) % 2) as f32).collect()).unwrap();
        let out = preprocess(&img, FULL_HEIGHT, FULL_WIDTH).unwrap();
        assert_eq!(out.shape(), &[1, FULL_HEIGHT, FULL_WIDTH]);
        // interior pixels of a doubled checkerboard blend neighbours 3:1
        let v = out.data()[10 * FULL_WIDTH + 10];
        assert!((v - 0.625).abs() < 1e-6 || (v - 0.375).abs() < 1e-6, "{v}");
    }

    #[test]
    fn two_by_two_checkerboard_bilinear_oracle() {
        let img = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        // source coordinate of output index o is (o + 0.5) / 2 - 0.5, clamped to [0, 1]
        let coord = |o: usize| (((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0)) as f32;
        for y in 0..4 {
            for x in 0..4 {
                let (fy, fx) = (coord(y), coord(x));
                let want = (1.0 - fy) * (1.0 - fx) + fy * fx;
                assert!((out.data()[y * 4 + x] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn narrow_input_is_padded_on_the_right() {
        let img = Tensor::filled(&[1, 240, 100], 1.0f32);
        let out = preprocess(&img, FULL_HEIGHT, FULL_WIDTH).unwrap();
        for y in [0, 239, 479] {
            let row = &out.data()[y * FULL_WIDTH..(y + 1) * FULL_WIDTH];
            assert!(row[..200].iter().all(|&v| v == 1.0));
            assert!(row[200..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_area_rejected() {
        assert!(preprocess(&Tensor::zeros(&[1, 0, 5]), 10, 10).is_err());
    }
}
