use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::{Shape, Tensor};

/// One slice: a `(1, 1, h, w)` intensity image and its lesion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub image: Tensor<f32>,
    pub mask: BinaryMask,
    pub subject_id: String,
    pub slice_index: usize,
}

impl SamplePair {
    pub fn new(image: Tensor<f32>, mask: BinaryMask, subject_id: impl Into<String>, slice_index: usize) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.c != 1 || (s.h, s.w) != mask.dims() {
            let (mh, mw) = mask.dims();
            return Err(Error::ShapeMismatch {
                op: "sample_pair",
                left: s,
                right: Shape::new(1, 1, mh, mw),
            });
        }
        Ok(Self {
            image,
            mask,
            subject_id: subject_id.into(),
            slice_index,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    /// `<subject>_<slice>`, the on-disk file stem.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.subject_id, self.slice_index)
    }
}

/// Top-left corner of a centred `target` window: `floor((src − dst) / 2)`.
pub fn crop_offsets(src: (usize, usize), target: (usize, usize)) -> Result<(usize, usize)> {
    if target.0 > src.0 || target.1 > src.1 {
        return Err(Error::CropTooLarge {
            src_h: src.0,
            src_w: src.1,
            target_h: target.0,
            target_w: target.1,
        });
    }
    Ok(((src.0 - target.0) / 2, (src.1 - target.1) / 2))
}

/// Crops image and mask to the same centred window.
pub fn crop_center(pair: &SamplePair, target: (usize, usize)) -> Result<SamplePair> {
    let (top, left) = crop_offsets(pair.dims(), target)?;
    let image = Tensor::from_fn(Shape::new(1, 1, target.0, target.1), |_, _, y, x| {
        pair.image.get(0, 0, top + y, left + x)
    });
    let mask = pair.mask.crop(top, left, target.0, target.1);
    SamplePair::new(image, mask, pair.subject_id.clone(), pair.slice_index)
}

/// Per-plane min-max scaling to `[0, 1]`; a constant plane becomes zeros.
pub fn normalize_intensity(image: &Tensor<f32>) -> Tensor<f32> {
    let s = image.shape();
    let mut out = image.clone();
    let plane = s.plane();
    for chunk in out.data_mut().chunks_mut(plane.max(1)) {
        let (lo, hi) = chunk
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 0.0 {
            for v in chunk.iter_mut() {
                *v = (*v - lo) / range;
            }
        } else {
            chunk.fill(0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(h: usize, w: usize) -> SamplePair {
        let image = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| (y * w + x) as f32);
        let mask = BinaryMask::from_fn(h, w, |y, x| (y + 2 * x) % 5 == 0);
        SamplePair::new(image, mask, "sub", 3).unwrap()
    }

    #[test]
    fn canonical_crop_offsets() {
        assert_eq!(crop_offsets((233, 197), (224, 176)).unwrap(), (4, 10));
        let p = pair(233, 197);
        let c = crop_center(&p, (224, 176)).unwrap();
        assert_eq!(c.dims(), (224, 176));
        assert_eq!(c.image.get(0, 0, 0, 0), (4 * 197 + 10) as f32);
        assert_eq!(c.mask.get(5, 7), p.mask.get(9, 17));
        assert!(c.mask.count() <= p.mask.count());
    }

    #[test]
    fn crop_identity_and_errors() {
        let p = pair(16, 12);
        assert_eq!(crop_center(&p, (16, 12)).unwrap(), p);
        assert!(matches!(crop_center(&p, (17, 12)), Err(Error::CropTooLarge { .. })));
    }

    #[test]
    fn normalize_examples() {
        let ramp = Tensor::from_fn(Shape::new(1, 1, 1, 5), |_, _, _, x| x as f32 / 4.0);
        assert_eq!(normalize_intensity(&ramp).data(), ramp.data());
        let flat = Tensor::full(Shape::new(1, 1, 3, 3), 7.0f32);
        assert!(normalize_intensity(&flat).data().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn normalized_spans_unit_interval(v in proptest::collection::vec(-100.0f32..100.0, 2..64)) {
            let n = v.len();
            prop_assume!(v.iter().any(|&x| x != v[0]));
            let t = Tensor::new(Shape::new(1, 1, 1, n), v).unwrap();
            let out = normalize_intensity(&t);
            let lo = out.data().iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = out.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert_eq!(lo, 0.0);
            prop_assert_eq!(hi, 1.0);
        }

        #[test]
        fn crop_is_idempotent(h in 16usize..40, w in 16usize..40) {
            let p = pair(h, w);
            let once = crop_center(&p, (16, 16)).unwrap();
            prop_assert_eq!(crop_center(&once, (16, 16)).unwrap(), once.clone());
            prop_assert!(once.mask.count() <= p.mask.count());
        }
    }
}
