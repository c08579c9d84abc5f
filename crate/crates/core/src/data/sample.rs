use crate::error::{Result, ScanError};
use crate::tensor::{Scalar, Tensor};
use crate::{HEART, NUM_CLASSES};

/// One normalized image with its one-hot mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample<T = f32> {
    /// Source filename stem.
    pub id: String,
    /// `[H, W, 1]`, zero mean and unit variance.
    pub image: Tensor<T>,
    /// `[H, W, 4]` one-hot in (left lung, right lung, heart, background) order.
    pub mask: Tensor<T>,
    pub heart_annotated: bool,
}

impl<T: Scalar> ImageSample<T> {
    /// Channels that carry annotations for this sample.
    pub fn active_channels(&self) -> [bool; NUM_CLASSES] {
        let mut a = [true; NUM_CLASSES];
        a[HEART] = self.heart_annotated;
        a
    }

    /// Checks shapes, one-hot integrity and the heart convention.
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image.hwc()?;
        if c != 1 {
            return Err(ScanError::shape(format!("sample {} image {:?}", self.id, self.image.shape())));
        }
        if self.mask.shape() != [h, w, NUM_CLASSES] {
            return Err(ScanError::shape(format!("sample {} mask {:?}", self.id, self.mask.shape())));
        }
        for (p, px) in self.mask.data().chunks_exact(NUM_CLASSES).enumerate() {
            let ones = px.iter().filter(|&&v| v == T::one()).count();
            let zeros = px.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != NUM_CLASSES - 1 {
                return Err(ScanError::Validation(format!("sample {} pixel {p} is not one-hot", self.id)));
            }
            if !self.heart_annotated && px[HEART] != T::zero() {
                return Err(ScanError::Validation(format!("sample {} has heart pixels but no heart annotation", self.id)));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ImageSample<U> {
        ImageSample {
            id: self.id.clone(),
            image: self.image.cast(),
            mask: self.mask.cast(),
            heart_annotated: self.heart_annotated,
        }
    }
}
