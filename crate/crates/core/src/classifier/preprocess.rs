use super::{ClassifierError, Tensor};
use crate::sensors::LeafImage;

/// Grayscale, area-average downscale to `size`×`size`, scale to [0, 1].
/// Returns a `[1, size, size]` tensor.
pub fn preprocess(image: &LeafImage, size: usize) -> Result<Tensor, ClassifierError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if size == 0 || w < size || h < size {
        return Err(ClassifierError::Shape(format!(
            "cannot downscale {w}x{h} to {size}x{size}"
        )));
    }
    let luma = image.luma();
    let mut out = Vec::with_capacity(size * size);
    for oy in 0..size {
        let (y0, y1) = (oy * h / size, (oy + 1) * h / size);
        for ox in 0..size {
            let (x0, x1) = (ox * w / size, (ox + 1) * w / size);
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += luma[y * w + x0..y * w + x1].iter().sum::<f64>();
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64 / 255.0);
        }
    }
    Tensor::new(vec![1, size, size], out)
}
